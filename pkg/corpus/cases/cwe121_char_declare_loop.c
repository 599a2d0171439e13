/* Stack buffer of 50 chars filled from a 100-char source in a loop. */
#include <string.h>

#include "io.h"

static int staticTrue = 1;

static void bad(void)
{
    char * data;
    char dataBadBuffer[50];
    if (staticTrue)
    {
        data = dataBadBuffer;
        data[0] = '\0';
    }
    {
        size_t i;
        char source[100];
        memset(source, 'C', 100-1);
        source[100-1] = '\0';
        for (i = 0; i < 100; i++)
        {
            data[i] = source[i];
        }
        data[100-1] = '\0';
        printLine(data);
    }
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
