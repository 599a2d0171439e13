/* Control: 50 chars copied into a correctly sized 50-char stack buffer. */
#include <string.h>

#include "io.h"

static int staticTrue = 1;

static void good(void)
{
    char * data;
    char dataGoodBuffer[50];
    if (staticTrue)
    {
        data = dataGoodBuffer;
        data[0] = '\0';
    }
    {
        size_t i;
        char source[50];
        memset(source, 'C', 50-1);
        source[50-1] = '\0';
        for (i = 0; i < 50; i++)
        {
            data[i] = source[i];
        }
        data[50-1] = '\0';
        printLine(data);
    }
}

int main(void)
{
    printLine("Calling good()...");
    good();
    printLine("Finished good()");
    return 0;
}
