/* 100-char source memmove'd into a 50-char stack buffer. */
#include <string.h>

#include "io.h"

static void bad(void)
{
    char * data;
    char dataBadBuffer[50];
    data = dataBadBuffer;
    data[0] = '\0';
    {
        char source[100];
        memset(source, 'C', 100-1);
        source[100-1] = '\0';
        memmove(data, source, 100*sizeof(char));
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
